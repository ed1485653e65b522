#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "bldlab/blas.hpp"

int main(int argc, char** argv) {
    bldlab::blas_init();
    bldlab::blas_set_threads(1);
    doctest::Context ctx;
    ctx.applyCommandLine(argc, argv);
    return ctx.run();
}
