void unroll_mul(int src[32], int dst[32]) {
  for (int i = 0; i < 32; i += 4) {
#pragma HLS PIPELINE II=1
    dst[i + 0] = src[i + 0] * 3;
    dst[i + 1] = src[i + 1] * 3;
    dst[i + 2] = src[i + 2] * 3;
    dst[i + 3] = src[i + 3] * 3;
  }
}
