#include <modeswitch/cli.hpp>

int main(int argc, char** argv) { return modeswitch::cli::cli_dispatch(argc, argv); }
