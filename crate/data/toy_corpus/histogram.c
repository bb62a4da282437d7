void histogram(unsigned char pixels[256], int hist[16]) {
  for (int k = 0; k < 16; k++) {
    hist[k] = 0;
  }
  for (int i = 0; i < 256; i++) {
#pragma HLS PIPELINE
    unsigned char p = pixels[i];
    hist[p >> 4] += 1;
  }
}
