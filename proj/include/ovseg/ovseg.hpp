#pragma once

#include "ovseg/distill.hpp"
#include "ovseg/error.hpp"
#include "ovseg/eval.hpp"
#include "ovseg/geometry.hpp"
#include "ovseg/geometry_io.hpp"
#include "ovseg/gradcheck.hpp"
#include "ovseg/infer.hpp"
#include "ovseg/lift.hpp"
#include "ovseg/masks2d.hpp"
#include "ovseg/net3d.hpp"
#include "ovseg/pipeline.hpp"
#include "ovseg/runtime.hpp"
#include "ovseg/synth.hpp"
