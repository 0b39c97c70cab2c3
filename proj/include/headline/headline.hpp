#pragma once

#include "headline/attention.hpp"
#include "headline/beam_search.hpp"
#include "headline/bleu.hpp"
#include "headline/checkpoint.hpp"
#include "headline/config.hpp"
#include "headline/corpus.hpp"
#include "headline/errors.hpp"
#include "headline/generate.hpp"
#include "headline/introspect.hpp"
#include "headline/layers.hpp"
#include "headline/numerics.hpp"
#include "headline/params.hpp"
#include "headline/seq2seq.hpp"
#include "headline/training.hpp"
