void vadd(int a[64], int b[64], int c[64]) {
#pragma HLS INTERFACE m_axi port=a
#pragma HLS INTERFACE m_axi port=b
  for (int i = 0; i < 64; i++) {
#pragma HLS PIPELINE II=1
    c[i] = a[i] + b[i];
  }
}
