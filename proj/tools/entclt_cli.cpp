#include "entclt/cli.hpp"

int main(int argc, char** argv) { return entclt::cli_main(argc, argv); }
