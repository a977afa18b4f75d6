#include <stdio.h>
#include "gradflow.h"
int main(void) {
    double bp_a[] = {0.0, 1.0}, bp_b[] = {0.0, 2.0}, one[] = {1.0};
    GfDensity *a = NULL, *b = NULL;
    double w2;
    if (gf_density_new(bp_a, 2, one, 1, true, &a) != GF_STATUS_OK) return 1;
    if (gf_density_new(bp_b, 2, one, 1, true, &b) != GF_STATUS_OK) return 1;
    if (gf_wasserstein1d(a, b, &w2) != GF_STATUS_OK) {
        char msg[256];
        gf_last_error(msg, sizeof msg);
        fprintf(stderr, "%s\n", msg);
        return 1;
    }
    printf("W2 = %.15f\n", w2);
    gf_density_free(a);
    gf_density_free(b);
    return 0;
}
