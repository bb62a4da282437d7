void moving_avg(int in[64], int out[64]) {
  int window[4];
#pragma HLS ARRAY_PARTITION variable=window complete
  int sum = 0;
  for (int j = 0; j < 4; j++) {
    window[j] = 0;
  }
  for (int i = 0; i < 64; i++) {
#pragma HLS PIPELINE II=1
    sum = sum - window[i % 4] + in[i];
    window[i % 4] = in[i];
    out[i] = sum >> 2;
  }
}
