void scale_shift(unsigned int in[32], long out[32], int gain) {
  unsigned int mask = 255;
  for (int i = 0; i < 32; i++) {
#pragma HLS PIPELINE
    unsigned int v = in[i] & mask;
    out[i] = (v * gain) << 3;
  }
}
