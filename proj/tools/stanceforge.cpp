#include "stanceforge/cli.hpp"

int main(int argc, char** argv) { return stanceforge::dispatch(argc, argv); }
