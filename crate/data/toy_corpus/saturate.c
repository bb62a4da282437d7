void saturate(short in[128], short out[128], int limit) {
  long total = 1;
  for (int i = 0; i < 128; i++) {
#pragma HLS PIPELINE II=1
    short s = in[i];
    if (s > limit) {
      s = limit;
    }
    out[i] = s;
    total = total + s;
  }
}
