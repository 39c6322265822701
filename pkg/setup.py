from setuptools import setup, find_packages

with open("README.md", "r") as fh:
    long_description = fh.read()

setup(
    name='topkrec',
    description='Top-K recommendation with a learned per-user quantile threshold',
    packages=find_packages(),
    package_data={'': ['*.ini', 'data/*.txt']},
    include_package_data=True,
    long_description=long_description,
    long_description_content_type="text/markdown",
    entry_points={'console_scripts': [
        'topkrec = topkrec.cli:main',
    ]},
    install_requires=[
        'numpy>=1.17',
        'scipy>=1.8',
        'networkx',
    ],
    tests_require=[
        'pytest',
        'pytest-cov',
    ],
    version='0.1.0',
    python_requires='>=3.8',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'Programming Language :: Python :: 3',
    ],
    zip_safe=True,
)
