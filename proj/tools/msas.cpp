// SPDX-License-Identifier: Apache-2.0
//
// msas command line: train, score, evaluate, search-scales, gradcheck, make-folds.

int main() { return 0; }
