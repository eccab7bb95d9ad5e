// Copyright 2026 the rwsaunet authors
// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
int main() { std::puts("rwsaunet: subcommands pending"); return 0; }
