#pragma once

#include "backend.hpp"
#include "entailment.hpp"
#include "error.hpp"
#include "evaluation.hpp"
#include "ingestion.hpp"
#include "manifest.hpp"
#include "memorize.hpp"
#include "ontology.hpp"
#include "prompting.hpp"
#include "pseudowords.hpp"
#include "reasoning.hpp"
#include "records.hpp"
#include "scoring.hpp"
#include "util.hpp"
