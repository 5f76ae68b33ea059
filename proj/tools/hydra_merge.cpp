// SPDX-License-Identifier: Apache-2.0
#include "hydra/cli.hpp"

int main(int argc, char** argv) { return hydra::cli::run(argc, argv); }
