"""Offline visual geo-localization.

Two independent localization routes share this package:

* place recognition: SIFT descriptors of query photos are matched against a
  database of panoramas, and every photo votes for the place it matches best;
* junction-sequence map matching: an observed sequence of junction types
  (T, X, Y, roundabout, crossroad) is searched for in an intersection graph
  built from GeoJSON road data.
"""

__version__ = "0.1.0"
