// One-dimensional three-point stencil, double precision.
void jacobi1d(void) {
    double a[100], b[100];
    int t, i;
    for (t = 0; t < 10; t++) {
        for (i = 1; i < 99; i++)
            b[i] = 0.33333 * (a[i - 1] + a[i] + a[i + 1]);
        for (i = 1; i < 99; i++)
            a[i] = b[i];
    }
}
