"""
File codecs: camera text files, PPM/PGM/PFM images, track lists and scene directories.
"""
