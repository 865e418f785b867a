from setuptools import find_packages, setup


setup(
    name='mrivit',
    version='0.1.0',
    description='Interpretable Vision Transformer pipeline for brain MRI classification',
    long_description=open('README.rst').read(),
    keywords='mri, vision transformer, clahe, attention rollout',
    license='BSD',
    packages=find_packages(exclude=['tests', 'tests.*']),
    include_package_data=True,
    python_requires='>=3.8',
    install_requires=[
        'numpy>=1.20',
        'scipy>=1.6',
        'Pillow>=8.0',
    ],
    entry_points={
        'console_scripts': [
            'mrivit = mrivit.cli:main',
        ],
    },
    classifiers=[
        'Development Status :: 4 - Beta',
        'Environment :: Console',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: BSD License',
        'Operating System :: POSIX :: Linux',
        'Programming Language :: Python',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.8',
        'Topic :: Scientific/Engineering :: Image Recognition',
        'Topic :: Scientific/Engineering :: Medical Science Apps.',
    ]
)
