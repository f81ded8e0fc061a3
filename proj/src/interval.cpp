#include "cplrnn/interval.hpp"
