#include "retarget/cli.h"

int main(int argc, char** argv) { return retarget::cli::run(argc, argv); }
