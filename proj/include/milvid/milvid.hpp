#pragma once

#include "milvid/bag_model.hpp"
#include "milvid/evaluation.hpp"
#include "milvid/feature_store.hpp"
#include "milvid/mil_objective.hpp"
#include "milvid/optimizers.hpp"
#include "milvid/scorer_net.hpp"
#include "milvid/trainer.hpp"
