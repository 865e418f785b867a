# -*- coding: utf-8 -*-
#
# mrivit documentation build configuration file.
#
# This file is execfile()d with the current directory set to its
# containing dir.

import os
import sys

sys.path.insert(0, os.path.abspath('..'))

# -- General configuration ------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
]

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = 'mrivit'
copyright = '2026, mrivit contributors'
author = 'mrivit contributors'

version = '0.1'
release = '0.1.0'

language = 'en'
exclude_patterns = ['_build']
pygments_style = 'sphinx'
todo_include_todos = False

# -- Options for HTML output ----------------------------------------------

html_theme = 'default'
html_static_path = []
htmlhelp_basename = 'mrivitdoc'

# -- Options for manual page output ---------------------------------------

man_pages = [
    (master_doc, 'mrivit', 'mrivit Documentation', [author], 1)
]
