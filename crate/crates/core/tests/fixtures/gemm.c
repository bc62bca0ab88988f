// Dense matrix multiply: C = alpha * A * B + beta * C.
void gemm(void) {
    double A[20][30], B[30][40], C[20][40];
    double alpha = 1.5, beta = 1.2;
    int i, j, k;
    for (i = 0; i < 20; i++) {
        for (j = 0; j < 40; j++)
            C[i][j] *= beta;
        for (k = 0; k < 30; k++)
            for (j = 0; j < 40; j++)
                C[i][j] += alpha * A[i][k] * B[k][j];
    }
}
