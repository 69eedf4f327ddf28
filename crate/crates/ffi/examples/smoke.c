/* Generate a lane, preprocess it, and print its dimensions.
 *
 *   cargo build -p gprhog-ffi --release
 *   cc crates/ffi/examples/smoke.c -Icrates/ffi/include \
 *      -Ltarget/release -lgprhog_ffi -o smoke
 *   LD_LIBRARY_PATH=target/release ./smoke
 */
#include <stdio.h>
#include <stdlib.h>

#include "gprhog.h"

static int check(GprStatus s, const char *what) {
    if (s != GPR_STATUS_OK) {
        const char *msg = gpr_last_error_message();
        fprintf(stderr, "%s failed (%d): %s\n", what, (int)s, msg ? msg : "?");
        return 1;
    }
    return 0;
}

int main(void) {
    GprVolume *raw = NULL, *pre = NULL;
    size_t nd, nc, nt;
    double *feat;
    size_t len = gpr_alarm_feature_len();

    if (check(gpr_synth_lane(2018, 0, &raw), "synth")) return 1;
    if (check(gpr_preprocess(raw, &pre), "preprocess")) return 1;
    if (check(gpr_volume_dims(pre, &nd, &nc, &nt), "dims")) return 1;
    printf("preprocessed lane: %zu x %zu x %zu\n", nd, nc, nt);

    feat = malloc(len * sizeof *feat);
    if (check(gpr_alarm_feature(pre, nd / 2, nc / 2, nt / 2, false, 3, feat, len), "feature"))
        return 1;
    printf("feature[0..4]: %g %g %g %g\n", feat[0], feat[1], feat[2], feat[3]);

    free(feat);
    gpr_volume_free(pre);
    gpr_volume_free(raw);
    return 0;
}
