#include <math.h>
#include <stdio.h>
#include <string.h>

#include "spmis.h"

#define CHECK(cond)                                                    \
  do {                                                                 \
    if (!(cond)) {                                                     \
      fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, #cond,   \
              spmis_last_error());                                     \
      return 1;                                                        \
    }                                                                  \
  } while (0)

int main(void) {
  SpmisSpeakerDb *db = NULL;
  CHECK(spmis_db_new(3, 0.95f, &db) == SPMIS_STATUS_OK);

  const float clips[] = {1.0f, 0.0f, 0.0f, 1.0f, 0.1f, 0.0f};
  CHECK(spmis_db_enroll(db, "alice", clips, 2, 3) == SPMIS_STATUS_OK);
  CHECK(spmis_db_enroll(db, "alice", clips, 1, 3) == SPMIS_STATUS_ALREADY_ENROLLED);
  CHECK(strlen(spmis_last_error()) > 0);
  CHECK(spmis_db_enroll(db, "bob", clips, 1, 2) == SPMIS_STATUS_DIMENSION_MISMATCH);
  CHECK(spmis_db_len(db) == 1);

  SpmisQuery q;
  const float probe[] = {0.0f, 0.0f, 1.0f};
  CHECK(spmis_db_query(db, probe, 3, &q) == SPMIS_STATUS_OK);
  CHECK(!q.matched);
  CHECK(fabs(q.similarity) < 1e-12);

  char name[8];
  size_t needed = 0;
  CHECK(spmis_db_speaker_at(db, 0, name, 3, &needed) == SPMIS_STATUS_BUFFER_TOO_SMALL);
  CHECK(needed == 6);
  CHECK(spmis_db_speaker_at(db, (size_t)q.best_index, name, sizeof name, NULL) == SPMIS_STATUS_OK);
  CHECK(strcmp(name, "alice") == 0);

  CHECK(spmis_db_query(NULL, probe, 3, &q) == SPMIS_STATUS_NULL_POINTER);
  spmis_db_free(db);
  printf("ok %s\n", spmis_version());
  return 0;
}
