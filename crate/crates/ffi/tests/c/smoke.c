#include <math.h>
#include <stdio.h>
#include "modedbm.h"

#define CHECK(call)                                                       \
  do {                                                                    \
    ModedbmStatus st_ = (call);                                           \
    if (st_ != MODEDBM_STATUS_OK) {                                       \
      fprintf(stderr, "%s: %d %s\n", #call, (int)st_,                     \
              modedbm_last_error_message());                              \
      return 1;                                                           \
    }                                                                     \
  } while (0)

int main(void) {
  size_t sizes[] = {4, 3, 2};
  ModedbmModel *model = NULL;
  double log_z = 0.0;
  CHECK(modedbm_model_new(sizes, 3, 0.0, 1, &model));
  CHECK(modedbm_exact_log_z(model, &log_z));
  if (fabs(log_z - 9.0 * log(2.0)) > 1e-12) {
    fprintf(stderr, "log_z %f\n", log_z);
    return 1;
  }
  if (modedbm_exact_log_z(NULL, &log_z) != MODEDBM_STATUS_NULL_POINTER) return 1;

  ModedbmDataset *data = NULL;
  double ll = 0.0;
  CHECK(modedbm_dataset_shifting_bar(4, 2, &data));
  CHECK(modedbm_exact_avg_ll(model, data, &ll));
  char *json = NULL;
  CHECK(modedbm_model_to_json(model, &json));
  printf("%s %.6f\n", modedbm_version(), ll);
  modedbm_string_free(json);
  modedbm_dataset_free(data);
  modedbm_model_free(model);
  return 0;
}
