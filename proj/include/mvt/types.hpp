// Triplet annotations and the id-addressed item store.
#pragma once

#include <mvt/error.hpp>
#include <mvt/model.hpp>

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace mvt {

using ItemId = std::uint32_t;

/// Worker `worker` judged the pair (i, j) the most similar of the three pairs
/// in {i, j, k}.
struct TripletAnnotation {
	std::string worker;
	ItemId i = 0;
	ItemId j = 0;
	ItemId k = 0;

	bool operator==(const TripletAnnotation&) const = default;

	bool distinct() const { return i != j && i != k && j != k; }
};

/// Item tensors addressed by item id.
class ItemStore {
public:
	ItemStore() = default;

	void add(ItemId id, ItemTensor tensor) {
		if (index_.contains(id))
			throw ArgumentError("duplicate item id " + std::to_string(id));
		index_.emplace(id, tensors_.size());
		ids_.push_back(id);
		tensors_.push_back(std::move(tensor));
	}

	bool contains(ItemId id) const { return index_.contains(id); }

	std::size_t position(ItemId id) const {
		auto it = index_.find(id);
		if (it == index_.end())
			throw ReferenceError("unknown item id " + std::to_string(id));
		return it->second;
	}

	const ItemTensor& get(ItemId id) const { return tensors_[position(id)]; }

	std::size_t size() const { return tensors_.size(); }
	bool empty() const { return tensors_.empty(); }
	const std::vector<ItemId>& ids() const { return ids_; }
	const std::vector<ItemTensor>& tensors() const { return tensors_; }

private:
	std::vector<ItemId> ids_;
	std::vector<ItemTensor> tensors_;
	std::unordered_map<ItemId, std::size_t> index_;
};

} // namespace mvt
