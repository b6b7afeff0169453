#include "nlprompt/cli.hpp"

int main(int argc, char** argv) { return nlprompt::cli_main(argc, argv); }
