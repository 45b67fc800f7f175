#pragma once

#include "slideprog/core.hpp"
#include "slideprog/image.hpp"
#include "slideprog/pyramid.hpp"
#include "slideprog/pyramid_io.hpp"
#include "slideprog/masking.hpp"
#include "slideprog/synthetic.hpp"
#include "slideprog/patching.hpp"
#include "slideprog/embedding.hpp"
#include "slideprog/augment.hpp"
#include "slideprog/classifier.hpp"
#include "slideprog/evaluation.hpp"
#include "slideprog/config.hpp"
#include "slideprog/pipeline.hpp"
#include "slideprog/report.hpp"
