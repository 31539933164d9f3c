#include <iostream>

#include "dflab/acceptance.hpp"

int main() { return dflab::acceptance_cli({}, std::cout); }
