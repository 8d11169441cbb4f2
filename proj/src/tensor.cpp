#include "gmmt/tensor.hpp"

#include <sstream>

namespace gmmt {

void sgd_step(const std::vector<Param*>& params, real lr, real momentum, real weight_decay) {
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Param& p = *params[pi];
        if (!p.grad.all_finite()) {
            std::ostringstream msg;
            msg << "sgd_step: non-finite gradient in param " << pi << " (shape";
            for (int e : p.value.shape) msg << ' ' << e;
            msg << "), training aborted";
            throw NumericError(msg.str());
        }
        for (std::size_t i = 0; i < p.value.data.size(); ++i) {
            real buf = momentum * p.momentum.data[i] + p.grad.data[i] + weight_decay * p.value.data[i];
            p.momentum.data[i] = buf;
            p.value.data[i] -= lr * buf;
        }
        p.zero_grad();
    }
}

}  // namespace gmmt
