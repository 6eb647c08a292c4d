#include "scantalk_cli.hpp"

int main(int argc, char** argv) { return scantalk::cli::run(argc, argv); }
