#pragma once

// Everything: tensors, model, training, fitting, dataset and the service.

#include "headfield/camera.hpp"
#include "headfield/checkpoint.hpp"
#include "headfield/config.hpp"
#include "headfield/dataset.hpp"
#include "headfield/errors.hpp"
#include "headfield/field.hpp"
#include "headfield/image_io.hpp"
#include "headfield/latent.hpp"
#include "headfield/losses.hpp"
#include "headfield/model.hpp"
#include "headfield/neural_renderer.hpp"
#include "headfield/nn.hpp"
#include "headfield/ops.hpp"
#include "headfield/optim.hpp"
#include "headfield/serialize.hpp"
#include "headfield/service.hpp"
#include "headfield/tensor.hpp"
#include "headfield/trainer.hpp"
#include "headfield/volume.hpp"
