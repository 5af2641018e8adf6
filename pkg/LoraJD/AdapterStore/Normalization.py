import logging

from LoraJD.AdapterStore.CompressedCollection import CompressedCollection
from LoraJD.AdapterStore.LoraAdapter import AdapterCollection
from LoraJD.Errors import UnknownAdapterError


logger = logging.getLogger(__name__)


def normalize_collection(collection: AdapterCollection) -> AdapterCollection:
    """
    Scales every adapter to a unit-Frobenius-norm product. B is divided by ||B A||_F and A is left
    untouched; original_norm keeps the pre-scaling norm.

    :param collection: Adapters to normalize
    :exception ValueError: an adapter has a zero product
    :return: New AdapterCollection in the same order
    """
    normalized = []
    for adapter in collection:
        norm = adapter.product_norm()
        if norm == 0.0:
            raise ValueError(f'adapter {adapter.id!r} has a zero product and cannot be normalized')
        normalized.append(adapter.scaled(1.0 / norm, original_norm=norm))
    logger.debug('normalized %d adapters', len(normalized))
    return AdapterCollection(normalized, d_a=collection.d_a, d_b=collection.d_b)


def denormalize_sigmas(compressed: CompressedCollection) -> CompressedCollection:
    """
    Multiplies every Sigma by its adapter's original norm so reconstructions approximate the
    unnormalized products. Collections that are not normalized come back unchanged.

    :param compressed: Collection whose Sigmas are on the unit-norm scale
    :exception UnknownAdapterError: an id has no recorded norm
    :return: New CompressedCollection with normalized=False
    """
    if not compressed.normalized:
        return compressed
    norms = compressed.norms
    missing = [adapter_id for adapter_id in compressed.ids if adapter_id not in norms]
    if missing:
        raise UnknownAdapterError(f'missing norm for adapter {missing[0]!r}')

    groups = []
    for group in compressed.groups:
        sigmas = {adapter_id: sigma.scaled(norms[adapter_id]) for adapter_id, sigma in group.sigmas.items()}
        groups.append(group.with_sigmas(sigmas))
    return compressed.replace(groups=groups, normalized=False)
