#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "featimg/runtime.hpp"

int main(int argc, char** argv) {
    featimg::configure_runtime(true);
    doctest::Context context(argc, argv);
    return context.run();
}
