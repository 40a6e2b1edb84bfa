#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "cryoquery/imaging.hpp"
#include "cryoquery/model.hpp"
#include "cryoquery/trainer.hpp"

// Flat key=value configuration with [section] headers. Unknown keys are
// rejected; precedence is flags > file > defaults; the resolved config is
// echoed verbatim into the output directory and hashed into checkpoints.

namespace cq::cfg {

class RunConfig {
public:
    static RunConfig defaults();

    void load_file(const std::string& path);
    void set(const std::string& key, const std::string& value);  // flag override

    const std::string& str(const std::string& key) const;
    long integer(const std::string& key) const;
    double real(const std::string& key) const;       // accepts "inf"
    bool boolean(const std::string& key) const;

    // canonical text of the resolved configuration
    std::string echo() const;
    void write_echo(const std::string& path) const;
    std::uint64_t hash() const;

    ModelConfig model_config(int image_side) const;
    train::TrainConfig train_config() const;
    img::SimulateSpec simulate_spec() const;

private:
    void require_known(const std::string& key) const;
    std::map<std::string, std::string> values_;
};

}  // namespace cq::cfg
