// SPDX-License-Identifier: Apache-2.0
#include "unisign/cli.hpp"

int main(int argc, char** argv) { return unisign::cli::run(argc, argv); }
