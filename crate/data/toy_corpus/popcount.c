int popcount(unsigned int v) {
  int count = 0;
  unsigned int w = v;
  while (w > 0) {
#pragma HLS LOOP_TRIPCOUNT max=32
    count += w & 1;
    w = w >> 1;
  }
  return count;
}
