# Tests package for bibeefmm
