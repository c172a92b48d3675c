#include <pybind11/pybind11.h>
PYBIND11_MODULE(_stablesde, m) { m.doc() = "placeholder"; }
