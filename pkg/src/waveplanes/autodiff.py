"""
Reverse-mode gradient tape

Operations are recorded in evaluation order as (output name, input names, VJP)
entries. `gradient` walks the list backwards, pulling cotangents from outputs to
inputs and summing contributions per name.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

Vjp = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass(frozen=True)
class TapeEntry:
    output: str
    inputs: tuple
    vjp: Vjp


class GradientTape:
    """Wengert list of recorded operations for one forward pass"""

    def __init__(self):
        self._entries: List[TapeEntry] = []
        self._outputs = set()

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, output: str, inputs: Sequence[str], vjp: Vjp) -> None:
        """
        Record one operation

        Args:
            output: Unique name of the produced value
            inputs: Names of the consumed values
            vjp: Maps the output cotangent to one cotangent per input (None = no contribution)

        Raises:
            ValueError: If `output` was already recorded
        """
        if output in self._outputs:
            raise ValueError(f"Tape output '{output}' recorded twice")
        self._outputs.add(output)
        self._entries.append(TapeEntry(output=output, inputs=tuple(inputs), vjp=vjp))

    def gradient(
        self,
        seeds: Mapping[str, Union[np.ndarray, float]],
        sources: Optional[Iterable[str]] = None,
    ) -> Dict[str, np.ndarray]:
        """
        Backpropagate seed cotangents through the recorded operations

        Args:
            seeds: Initial cotangents by name (e.g. {'loss': 1.0})
            sources: Names to return; None returns every cotangent reached

        Returns:
            Dict of accumulated cotangents; sources never reached are absent
        """
        cotangents: Dict[str, np.ndarray] = {name: np.asarray(value) for name, value in seeds.items()}

        for entry in reversed(self._entries):
            upstream = cotangents.get(entry.output)
            if upstream is None:
                continue
            grads = entry.vjp(upstream)
            if len(grads) != len(entry.inputs):
                raise ValueError(
                    f"VJP of '{entry.output}' returned {len(grads)} cotangents for {len(entry.inputs)} inputs"
                )
            for name, grad in zip(entry.inputs, grads):
                if grad is None:
                    continue
                previous = cotangents.get(name)
                cotangents[name] = grad if previous is None else previous + grad

        if sources is None:
            return cotangents
        return {name: cotangents[name] for name in sources if name in cotangents}
