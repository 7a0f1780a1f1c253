#include "mfc/run.hpp"

int main(int argc, char** argv) { return mfc::run_main(argc, argv); }
