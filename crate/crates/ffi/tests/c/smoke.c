/* Reads a WAV file, imagines lyrics, redecodes with another weight. */
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "imly.h"

static int die(const char *what, ImlyStatus s) {
    const char *msg = imly_last_error_message();
    fprintf(stderr, "%s: status %d: %s\n", what, (int)s, msg ? msg : "(none)");
    return 10 + (int)s;
}

int main(int argc, char **argv) {
    if (argc != 3) {
        fprintf(stderr, "usage: smoke DATA_DIR WAV\n");
        return 2;
    }
    FILE *f = fopen(argv[2], "rb");
    if (!f) return 3;
    fseek(f, 0, SEEK_END);
    long len = ftell(f);
    fseek(f, 0, SEEK_SET);
    unsigned char *wav = malloc((size_t)len);
    if (fread(wav, 1, (size_t)len, f) != (size_t)len) return 4;
    fclose(f);

    ImlyPipeline *p = NULL;
    ImlyStatus s = imly_pipeline_open(argv[1], &p);
    if (s != IMLY_STATUS_OK) return die("open", s);

    char *json = NULL;
    s = imly_imagine_wav(p, wav, (size_t)len, "use_separation = false\nseed = 3\n", &json);
    if (s != IMLY_STATUS_OK) return die("imagine", s);
    printf("%s", json);

    /* pull the audio hash out of the document for the redecode call */
    const char *key = "\"audio_sha256\": \"";
    char *at = strstr(json, key);
    if (!at) return 5;
    char sha[65];
    memcpy(sha, at + strlen(key), 64);
    sha[64] = '\0';
    imly_string_free(json);

    char *again = NULL;
    s = imly_redecode(p, sha, "use_separation = false\nlm_weight = 0\n", &again);
    if (s != IMLY_STATUS_OK) return die("redecode", s);
    imly_string_free(again);

    s = imly_imagine_wav(p, (const unsigned char *)"nope", 4, NULL, &json);
    if (s != IMLY_STATUS_INVALID_AUDIO || imly_last_error_message() == NULL) return 6;

    imly_pipeline_free(p);
    free(wav);
    fprintf(stderr, "version %s\n", imly_version());
    return 0;
}
