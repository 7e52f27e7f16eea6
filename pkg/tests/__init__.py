# cfmm test suite
