#include "clarkhedge/cli.hpp"

int main(int argc, char** argv)
{
    return clarkhedge::run_command(argc, argv);
}
