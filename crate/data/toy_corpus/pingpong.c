#define HALF 32

void pingpong(int buf[2 * HALF], int out[HALF]) {
#pragma HLS ARRAY_PARTITION variable=buf cyclic factor=2
  int bias = 5;
  for (int i = 0; i < HALF; i++) {
#pragma HLS PIPELINE II=1
    out[i] = buf[i] + buf[i + HALF] + bias;
  }
}
