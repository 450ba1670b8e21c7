#pragma once

#include "nmaci/error.hpp"
#include "nmaci/model.hpp"
#include "nmaci/likelihood.hpp"
#include "nmaci/estimation.hpp"
#include "nmaci/intervals.hpp"
#include "nmaci/bartlett.hpp"
#include "nmaci/bootstrap.hpp"
#include "nmaci/bias_oracle.hpp"
#include "nmaci/simtool.hpp"
#include "nmaci/io.hpp"
#include "nmaci/analysis.hpp"
