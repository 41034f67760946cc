#include "raml/cli.hpp"

int main(int argc, char** argv) { return raml::cli::run(argc, argv); }
