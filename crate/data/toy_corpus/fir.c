#define N 16

void fir(int x[N], int coef[N], int *y) {
#pragma HLS INTERFACE m_axi port=x
  int acc = 0;
  for (int i = 0; i < N; i++) {
#pragma HLS PIPELINE II=1
    acc += x[i] * coef[i];
  }
  *y = acc >> 4;
}
