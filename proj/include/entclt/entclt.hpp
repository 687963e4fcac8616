#ifndef ENTCLT_ENTCLT_HPP
#define ENTCLT_ENTCLT_HPP

#include "entclt/bounds.hpp"
#include "entclt/check.hpp"
#include "entclt/decomposition.hpp"
#include "entclt/errors.hpp"
#include "entclt/families.hpp"
#include "entclt/functionals.hpp"
#include "entclt/grid.hpp"
#include "entclt/lab.hpp"
#include "entclt/spectral.hpp"

#endif
