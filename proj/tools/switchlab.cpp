#include "switchlab/cli.hpp"

int main(int argc, char** argv) { return switchlab::run(argc, argv); }
