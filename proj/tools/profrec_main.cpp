#include "profrec/pipeline.hpp"

int main(int argc, char** argv) { return profrec::pipeline::run_cli(argc, argv); }
