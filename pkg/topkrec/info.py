"""
info.py : Banner and terminal colours
"""

COLORS = {'blue': "\x1b[94m", 'yellow': "\x1b[93m", 'green': "\x1b[92m", 'red': "\x1b[91m"}

def colorString(word, color):
    if color == 'black':
        return word
    if color not in COLORS:
        raise KeyError("Unknown colour %s" % color)
    return COLORS[color] + word + "\x1b[0m"

def print_logo(logger=None):
    logostr = """
  _              _
 | |_ ___  _ __ | | ___ __ ___  ___
 | __/ _ \\| '_ \\| |/ / '__/ _ \\/ __|
 | || (_) | |_) |   <| | |  __/ (__
  \\__\\___/| .__/|_|\\_\\_|  \\___|\\___|
          |_|
"""
    if logger is None:
        print(logostr)
    else:
        logger.info(logostr + "\n")
