#include "pfdet/cli.hpp"

int main(int argc, char** argv) { return pfdet::cli_main(argc, argv); }
