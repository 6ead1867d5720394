#pragma once

#include "objcrop/analysis.hpp"
#include "objcrop/cropgeom.hpp"
#include "objcrop/datamodel.hpp"
#include "objcrop/episodes.hpp"
#include "objcrop/error.hpp"
#include "objcrop/fusion.hpp"
#include "objcrop/pipeline.hpp"
#include "objcrop/probe.hpp"
#include "objcrop/rng.hpp"
#include "objcrop/stats.hpp"
#include "objcrop/synth.hpp"
#include "objcrop/transduction.hpp"
