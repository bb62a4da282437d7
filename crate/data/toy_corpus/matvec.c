void matvec(int m[8][8], int v[8], int r[8]) {
  for (int i = 0; i < 8; i++) {
    int acc = 0;
    for (int j = 0; j < 8; j++) {
#pragma HLS PIPELINE II=1
      acc += m[i][j] * v[j];
    }
    r[i] = acc;
  }
}
