#include "cli.hpp"

int main(int argc, char** argv) { return eigenshot::cli::run(argc, argv); }
