#pragma once

#include "genrec/bench.hpp"
#include "genrec/decoder.hpp"
#include "genrec/errors.hpp"
#include "genrec/logits.hpp"
#include "genrec/losses.hpp"
#include "genrec/random.hpp"
#include "genrec/report.hpp"
#include "genrec/tokenizer.hpp"
#include "genrec/trainer.hpp"
#include "genrec/vocab.hpp"
