#pragma once

#include "adapt/chain.hpp"
#include "adapt/corpus.hpp"
#include "adapt/error.hpp"
#include "adapt/evaluator.hpp"
#include "adapt/gateway.hpp"
#include "adapt/http_backend.hpp"
#include "adapt/label_mapper.hpp"
#include "adapt/pipeline.hpp"
#include "adapt/reasoning.hpp"
#include "adapt/scripted_backend.hpp"
#include "adapt/sentencing.hpp"
#include "adapt/synthesizer.hpp"
#include "adapt/templates.hpp"
#include "adapt/util.hpp"
